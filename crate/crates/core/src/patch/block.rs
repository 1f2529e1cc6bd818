use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dct_matrix, hard_threshold, kron_all};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockConfig {
    /// Edge length `b` of the cubic blocks.
    pub size: usize,
    /// Blocks per matched group `y`, reference included.
    pub neighbors: usize,
    /// Search window half-width in voxels, per axis.
    pub window: usize,
    /// Spacing of reference block origins.
    pub stride: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            size: 4,
            neighbors: 16,
            window: 5,
            stride: 4,
        }
    }
}

impl BlockConfig {
    pub fn block_len(&self) -> usize {
        self.size.pow(3)
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        if self.size == 0 || self.neighbors == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "block size, neighbors and stride must be positive: {self:?}"
            )));
        }
        if dims.iter().any(|&d| d < self.size) {
            return Err(Error::Config(format!(
                "grid {dims:?} is smaller than the block size {}",
                self.size
            )));
        }
        Ok(())
    }
}

/// Matched groups: `groups[i][0]` is reference block `i`, followed by its
/// `y - 1` nearest window blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMatches {
    pub size: usize,
    pub dims: [usize; 3],
    pub groups: Vec<Vec<[usize; 3]>>,
}

impl BlockMatches {
    pub fn neighbors(&self) -> usize {
        self.groups.first().map_or(0, Vec::len)
    }
}

fn reference_origins(dim: usize, b: usize, stride: usize) -> Vec<usize> {
    let last = dim - b;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

fn block_offsets(dims: [usize; 3], b: usize) -> Vec<usize> {
    let mut off = Vec::with_capacity(b * b * b);
    for i in 0..b {
        for j in 0..b {
            for k in 0..b {
                off.push((i * dims[1] + j) * dims[2] + k);
            }
        }
    }
    off
}

fn base_index(dims: [usize; 3], o: [usize; 3]) -> usize {
    (o[0] * dims[1] + o[1]) * dims[2] + o[2]
}

/// Groups each reference block with its most similar blocks in the window.
///
/// Candidates are all in-grid integer origins within `window` voxels of the
/// reference per axis. They are ranked by squared distance, ties by
/// lexicographic origin. The reference itself always leads its group.
pub fn block_match(values: &[f64], dims: [usize; 3], cfg: &BlockConfig) -> Result<BlockMatches> {
    cfg.validate(dims)?;
    if values.len() != dims.iter().product::<usize>() {
        return Err(Error::mismatch(dims.iter().product::<usize>(), values.len()));
    }
    let b = cfg.size;
    let refs_axis: Vec<Vec<usize>> = (0..3).map(|a| reference_origins(dims[a], b, cfg.stride)).collect();
    let mut refs = Vec::new();
    for &i in &refs_axis[0] {
        for &j in &refs_axis[1] {
            for &k in &refs_axis[2] {
                refs.push([i, j, k]);
            }
        }
    }
    let offsets = block_offsets(dims, b);
    let window = |r: usize, a: usize| r.saturating_sub(cfg.window)..=(r + cfg.window).min(dims[a] - b);

    let groups: Result<Vec<Vec<[usize; 3]>>> = refs
        .par_iter()
        .map(|&r| {
            let rb = base_index(dims, r);
            let mut cands: Vec<(f64, [usize; 3])> = Vec::new();
            for i in window(r[0], 0) {
                for j in window(r[1], 1) {
                    for k in window(r[2], 2) {
                        let o = [i, j, k];
                        if o == r {
                            continue;
                        }
                        let cb = base_index(dims, o);
                        let d: f64 = offsets
                            .iter()
                            .map(|&t| {
                                let e = values[rb + t] - values[cb + t];
                                e * e
                            })
                            .sum();
                        cands.push((d, o));
                    }
                }
            }
            if cands.len() + 1 < cfg.neighbors {
                return Err(Error::Config(format!(
                    "search window around {r:?} holds {} blocks, fewer than {} neighbors",
                    cands.len() + 1,
                    cfg.neighbors
                )));
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut g = Vec::with_capacity(cfg.neighbors);
            g.push(r);
            g.extend(cands.iter().take(cfg.neighbors - 1).map(|c| c.1));
            Ok(g)
        })
        .collect();
    Ok(BlockMatches {
        size: b,
        dims,
        groups: groups?,
    })
}

/// `B u_i` for every group: `b^3 x y`, one column per matched block.
pub fn blocks_extract(values: &[f64], matches: &BlockMatches) -> Vec<DMatrix<f64>> {
    let offsets = block_offsets(matches.dims, matches.size);
    matches
        .groups
        .par_iter()
        .map(|g| {
            let mut m = DMatrix::zeros(offsets.len(), g.len());
            for (c, &o) in g.iter().enumerate() {
                let base = base_index(matches.dims, o);
                for (r, &t) in offsets.iter().enumerate() {
                    m[(r, c)] = values[base + t];
                }
            }
            m
        })
        .collect()
}

/// `sum_i B^T T_i`: scatters block stacks back onto the grid, summing overlaps.
pub fn blocks_aggregate(targets: &[DMatrix<f64>], matches: &BlockMatches, out: &mut [f64]) {
    let offsets = block_offsets(matches.dims, matches.size);
    out.fill(0.0);
    for (g, t) in matches.groups.iter().zip(targets) {
        for (c, &o) in g.iter().enumerate() {
            let base = base_index(matches.dims, o);
            for (r, &off) in offsets.iter().enumerate() {
                out[base + off] += t[(r, c)];
            }
        }
    }
}

/// `sum_i B^T B`: how often each voxel appears across all groups.
pub fn block_coverage(matches: &BlockMatches) -> Vec<f64> {
    let offsets = block_offsets(matches.dims, matches.size);
    let mut cov = vec![0.0; matches.dims.iter().product()];
    for g in &matches.groups {
        for &o in g {
            let base = base_index(matches.dims, o);
            for &off in &offsets {
                cov[base + off] += 1.0;
            }
        }
    }
    cov
}

/// Orthogonal `D_s` (`b^3 x b^3`), orthogonal `D_n` (`y x y`) and per-group
/// sparse coefficients `C_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryTriplet {
    pub ds: DMatrix<f64>,
    pub dn: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
    /// Smallest kept coefficient magnitude `t_u`.
    pub threshold: f64,
}

impl DictionaryTriplet {
    /// 3D DCT synthesis for `D_s`, 1D DCT synthesis for `D_n`, no coefficients.
    pub fn dct(block_size: usize, neighbors: usize) -> Self {
        let c = dct_matrix(block_size).transpose();
        DictionaryTriplet {
            ds: kron_all(&[&c, &c, &c]),
            dn: dct_matrix(neighbors).transpose(),
            coeffs: Vec::new(),
            threshold: 0.0,
        }
    }

    /// `D_s C_i D_n^T` for every group.
    pub fn reconstruct(&self) -> Vec<DMatrix<f64>> {
        self.coeffs
            .par_iter()
            .map(|c| &self.ds * c * self.dn.transpose())
            .collect()
    }

    pub fn nonzeros(&self) -> usize {
        self.coeffs
            .iter()
            .map(|c| c.iter().filter(|v| **v != 0.0).count())
            .sum()
    }
}

/// `sum_i |B_i - D_s C_i D_n^T|^2`.
pub fn triplet_residual(blocks: &[DMatrix<f64>], t: &DictionaryTriplet) -> f64 {
    let parts: Vec<f64> = blocks
        .par_iter()
        .zip(&t.coeffs)
        .map(|(b, c)| (b - &t.ds * c * t.dn.transpose()).norm_squared())
        .collect();
    parts.iter().sum()
}

#[derive(Debug, Clone)]
pub struct TripletUpdate {
    pub triplet: DictionaryTriplet,
    /// Residual after every coefficient, `D_s` and `D_n` step.
    pub residuals: Vec<f64>,
    /// Procrustes solves that needed the rank-deficient completion.
    pub degenerate: usize,
}

/// Orthogonal Procrustes `argmax_D tr(D^T M)` over orthogonal `D`.
///
/// When `M` is rank-deficient the null directions are completed with the
/// orthogonal matrix closest to `prev` restricted to them.
fn procrustes(m: &DMatrix<f64>, prev: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = m.nrows();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    if smax <= 0.0 || !smax.is_finite() {
        return (prev.clone(), true);
    }
    let tol = smax * 1e-12 * n as f64;
    let range: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] > tol).collect();
    if range.len() == n {
        return (&u * &vt, false);
    }
    let null: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= tol).collect();
    let ur = u.select_columns(&range);
    let vr = vt.select_rows(&range).transpose();
    let un = u.select_columns(&null);
    let vn = vt.select_rows(&null).transpose();
    let x = un.transpose() * prev * &vn;
    let xs = x.svd(true, true);
    let q = xs.u.expect("requested U") * xs.v_t.expect("requested V^T");
    (&ur * vr.transpose() + &un * q * vn.transpose(), true)
}

/// Alternating sparse coding and Procrustes updates of the triplet.
///
/// Each sweep: `C_i` from a global top-k hard threshold of `D_s^T B_i D_n`,
/// then `D_s = U V^T` of `sum B_i D_n C_i^T`, then `D_n = U V^T` of
/// `sum B_i^T D_s C_i`. Every step is an exact minimization, so the residual
/// never increases.
pub fn update_triplet(
    blocks: &[DMatrix<f64>],
    prev: &DictionaryTriplet,
    rho_u: f64,
    sweeps: usize,
) -> Result<TripletUpdate> {
    if blocks.is_empty() {
        return Err(Error::Config("no blocks to learn the triplet from".into()));
    }
    let (x, y) = blocks[0].shape();
    if prev.ds.shape() != (x, x) || prev.dn.shape() != (y, y) {
        return Err(Error::mismatch(
            format!("D_s {x}x{x}, D_n {y}x{y}"),
            format!("D_s {:?}, D_n {:?}", prev.ds.shape(), prev.dn.shape()),
        ));
    }
    if blocks.iter().any(|b| b.shape() != (x, y)) {
        return Err(Error::Config("blocks differ in shape".into()));
    }
    if !(0.0..=1.0).contains(&rho_u) {
        return Err(Error::Config(format!("keep fraction must lie in [0, 1], got {rho_u}")));
    }
    let mut t = DictionaryTriplet {
        ds: prev.ds.clone(),
        dn: prev.dn.clone(),
        coeffs: Vec::new(),
        threshold: 0.0,
    };
    let mut residuals = Vec::with_capacity(3 * sweeps);
    let mut degenerate = 0;
    for _ in 0..sweeps.max(1) {
        // coefficients: one global threshold across all groups
        let proj: Vec<DMatrix<f64>> = blocks
            .par_iter()
            .map(|b| t.ds.transpose() * b * &t.dn)
            .collect();
        let mut stacked = DMatrix::zeros(x * y, proj.len());
        for (j, p) in proj.iter().enumerate() {
            stacked.column_mut(j).copy_from_slice(p.as_slice());
        }
        let code = hard_threshold(stacked, rho_u);
        t.threshold = code.threshold;
        t.coeffs = (0..proj.len())
            .map(|j| DMatrix::from_column_slice(x, y, code.coeffs.column(j).as_slice()))
            .collect();
        residuals.push(triplet_residual(blocks, &t));
        if sweeps == 0 {
            break;
        }

        let parts: Vec<DMatrix<f64>> = blocks
            .par_iter()
            .zip(&t.coeffs)
            .map(|(b, c)| b * &t.dn * c.transpose())
            .collect();
        let ms = parts.iter().fold(DMatrix::zeros(x, x), |acc, p| acc + p);
        let (ds, deg) = procrustes(&ms, &t.ds);
        degenerate += usize::from(deg);
        t.ds = ds;
        residuals.push(triplet_residual(blocks, &t));

        let parts: Vec<DMatrix<f64>> = blocks
            .par_iter()
            .zip(&t.coeffs)
            .map(|(b, c)| b.transpose() * &t.ds * c)
            .collect();
        let mn = parts.iter().fold(DMatrix::zeros(y, y), |acc, p| acc + p);
        let (dn, deg) = procrustes(&mn, &t.dn);
        degenerate += usize::from(deg);
        t.dn = dn;
        residuals.push(triplet_residual(blocks, &t));
    }
    if degenerate > 0 {
        warn!("triplet update: {degenerate} rank-deficient Procrustes solves completed from the previous dictionary");
    }
    Ok(TripletUpdate {
        triplet: t,
        residuals,
        degenerate,
    })
}
