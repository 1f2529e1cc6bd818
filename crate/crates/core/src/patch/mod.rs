//! Signal patches, the separable DCT dictionary, and the block-matched
//! dictionary triplet.

mod block;
mod dct;

pub use block::{
    block_coverage, block_match, blocks_aggregate, blocks_extract, triplet_residual, update_triplet,
    BlockConfig, BlockMatches, DictionaryTriplet, TripletUpdate,
};
pub use dct::{dct_matrix, kron_all, SignalDictionary};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TransientSignal;

/// Patch shape and stride over the signal viewed as `N_x x N_y x Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    /// `(r_x, r_y, r_q)`.
    pub shape: [usize; 3],
    pub stride: [usize; 3],
}

impl PatchConfig {
    /// Non-overlapping tiling with the given patch shape.
    pub fn tiling(shape: [usize; 3]) -> Self {
        PatchConfig {
            shape,
            stride: shape,
        }
    }

    /// `min(N_x, 3) x min(N_y, 3) x min(Q, 64)`, non-overlapping.
    pub fn default_for(dims: [usize; 3]) -> Self {
        PatchConfig::tiling([dims[0].min(3), dims[1].min(3), dims[2].min(64)])
    }

    pub fn is_tiling(&self) -> bool {
        self.shape == self.stride
    }

    pub fn patch_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.shape[a] == 0 || self.stride[a] == 0 {
                return Err(Error::Config(format!(
                    "patch shape and stride must be positive, got {:?} / {:?}",
                    self.shape, self.stride
                )));
            }
            if self.stride[a] > self.shape[a] {
                return Err(Error::Config(format!(
                    "patch stride {:?} exceeds shape {:?}; entries would be left uncovered",
                    self.stride, self.shape
                )));
            }
        }
        Ok(())
    }

    /// Patch origins along each axis and the zero-padded extent.
    pub fn layout(&self, dims: [usize; 3]) -> Result<PatchLayout> {
        self.validate()?;
        let mut counts = [0; 3];
        let mut padded = [0; 3];
        for a in 0..3 {
            if dims[a] == 0 {
                return Err(Error::Config("signal has an empty axis".into()));
            }
            let (r, s) = (self.shape[a], self.stride[a]);
            counts[a] = if dims[a] <= r { 1 } else { (dims[a] - r).div_ceil(s) + 1 };
            padded[a] = (counts[a] - 1) * s + r;
        }
        Ok(PatchLayout {
            cfg: *self,
            dims,
            counts,
            padded,
        })
    }
}

/// A resolved patch tiling for specific signal dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLayout {
    pub cfg: PatchConfig,
    pub dims: [usize; 3],
    /// Patches per axis.
    pub counts: [usize; 3],
    pub padded: [usize; 3],
}

impl PatchLayout {
    pub fn num_patches(&self) -> usize {
        self.counts.iter().product()
    }

    /// Patch origins in lexicographic `(x, y, q)` order.
    fn origins(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [cx, cy, cq] = self.counts;
        let s = self.cfg.stride;
        (0..cx).flat_map(move |a| {
            (0..cy).flat_map(move |b| (0..cq).map(move |c| [a * s[0], b * s[1], c * s[2]]))
        })
    }

    /// Visits every in-bounds entry of every patch as `(column, row, flat signal index)`.
    fn for_each_entry(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [rx, ry, rq] = self.cfg.shape;
        let [nx, ny, nq] = self.dims;
        for (col, o) in self.origins().enumerate() {
            for tq in 0..rq {
                let q = o[2] + tq;
                if q >= nq {
                    break;
                }
                for ty in 0..ry {
                    let y = o[1] + ty;
                    if y >= ny {
                        break;
                    }
                    for tx in 0..rx {
                        let x = o[0] + tx;
                        if x >= nx {
                            break;
                        }
                        let row = tx + rx * (ty + ry * tq);
                        f(col, row, (x * ny + y) * nq + q);
                    }
                }
            }
        }
    }
}

/// Signal dimensions `(N_x, N_y, Q)` with pair `p = ix * N_y + iy`.
pub fn signal_dims(sig: &TransientSignal) -> [usize; 3] {
    let (nx, ny) = sig.geometry.scan_shape();
    [nx, ny, sig.geometry.num_bins]
}

/// `P(tau)`: one column per patch, rows vectorized with x fastest.
pub fn extract_patches(sig: &TransientSignal, cfg: &PatchConfig) -> Result<DMatrix<f64>> {
    let layout = cfg.layout(signal_dims(sig))?;
    Ok(extract_flat(sig.as_slice(), &layout))
}

pub(crate) fn extract_flat(values: &[f64], layout: &PatchLayout) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(layout.cfg.patch_len(), layout.num_patches());
    layout.for_each_entry(|col, row, idx| m[(row, col)] = values[idx]);
    m
}

/// `P*`: averages overlapping contributions and drops the padding.
pub fn aggregate_patches(
    patches: &DMatrix<f64>,
    like: &TransientSignal,
    cfg: &PatchConfig,
) -> Result<TransientSignal> {
    let layout = cfg.layout(signal_dims(like))?;
    if patches.nrows() != cfg.patch_len() || patches.ncols() != layout.num_patches() {
        return Err(Error::Config(format!(
            "patch matrix is {}x{}, tiling expects {}x{}",
            patches.nrows(),
            patches.ncols(),
            cfg.patch_len(),
            layout.num_patches()
        )));
    }
    let mut out = TransientSignal::zeros(&like.geometry);
    aggregate_flat(patches, &layout, out.as_mut_slice());
    Ok(out)
}

pub(crate) fn aggregate_flat(patches: &DMatrix<f64>, layout: &PatchLayout, out: &mut [f64]) {
    out.fill(0.0);
    if layout.cfg.is_tiling() {
        layout.for_each_entry(|col, row, idx| out[idx] = patches[(row, col)]);
        return;
    }
    // running mean, so equal contributions reproduce their value exactly
    let mut cover = vec![0u32; out.len()];
    layout.for_each_entry(|col, row, idx| {
        cover[idx] += 1;
        out[idx] += (patches[(row, col)] - out[idx]) / f64::from(cover[idx]);
    });
}

/// Indices of the `k` largest magnitudes; ties go to the lower index.
pub(crate) fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let k = k.min(values.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &usize, b: &usize| {
        values[*b]
            .abs()
            .total_cmp(&values[*a].abs())
            .then(a.cmp(b))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Number of coefficients kept under keep fraction `rho`.
pub fn keep_count(rho: f64, total: usize) -> usize {
    // the slack keeps exact products such as 0.05 * 320 from rounding up
    ((rho * total as f64 - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Hard-thresholded sparse code.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub coeffs: DMatrix<f64>,
    pub kept: usize,
    /// Smallest kept magnitude; 0 when nothing is kept.
    pub threshold: f64,
}

/// S-update: keeps the `ceil(rho n)` largest coefficients of `D^T (Ptau + PAu) / 2`.
///
/// For orthogonal `D` this is the exact minimizer of
/// `|Ptau - D S|^2 + |PAu - D S|^2 + 2 t^2 |S|_0` with `t` the threshold.
pub fn update_s(
    ptau: &DMatrix<f64>,
    pau: &DMatrix<f64>,
    dict: &SignalDictionary,
    rho: f64,
) -> Result<SparseCode> {
    if ptau.shape() != pau.shape() {
        return Err(Error::mismatch(
            format!("{:?}", ptau.shape()),
            format!("{:?}", pau.shape()),
        ));
    }
    if ptau.nrows() != dict.atom_len() {
        return Err(Error::mismatch(dict.atom_len(), ptau.nrows()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("keep fraction must lie in [0, 1], got {rho}")));
    }
    let mut c = DMatrix::zeros(ptau.nrows(), ptau.ncols());
    for j in 0..ptau.ncols() {
        let m: Vec<f64> = ptau
            .column(j)
            .iter()
            .zip(pau.column(j).iter())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        c.column_mut(j).copy_from_slice(&dict.analysis(&m));
    }
    Ok(hard_threshold(c, rho))
}

pub(crate) fn hard_threshold(c: DMatrix<f64>, rho: f64) -> SparseCode {
    let k = keep_count(rho, c.len());
    let keep = top_k_indices(c.as_slice(), k);
    let threshold = keep.last().map_or(0.0, |&i| c.as_slice()[i].abs());
    let mut coeffs = DMatrix::zeros(c.nrows(), c.ncols());
    for &i in &keep {
        coeffs.as_mut_slice()[i] = c.as_slice()[i];
    }
    SparseCode {
        coeffs,
        kept: keep.len(),
        threshold,
    }
}

/// `D S`, column by column.
pub fn synthesize(dict: &SignalDictionary, s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(s.nrows(), s.ncols());
    for j in 0..s.ncols() {
        let col: Vec<f64> = s.column(j).iter().copied().collect();
        out.column_mut(j).copy_from_slice(&dict.synthesis(&col));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::MeasurementGeometry;
    use proptest::prelude::*;

    fn signal(nx: usize, ny: usize, q: usize, f: impl Fn(usize) -> f64) -> TransientSignal {
        let g = MeasurementGeometry::confocal_raster(nx, ny, 0.1, [0.0, 0.0], 32e-12, q).unwrap();
        TransientSignal::from_vec(&g, (0..nx * ny * q).map(f).collect()).unwrap()
    }

    #[test]
    fn single_pair_two_patches() {
        let s = signal(1, 1, 4, |i| i as f64 + 1.0);
        let cfg = PatchConfig::tiling([1, 1, 2]);
        let m = extract_patches(&s, &cfg).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_signal_constant_columns() {
        let s = signal(3, 3, 10, |_| 2.5);
        let cfg = PatchConfig::tiling([3, 3, 5]);
        let m = extract_patches(&s, &cfg).unwrap();
        assert!(m.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn padding_is_zero_and_dropped() {
        let s = signal(3, 3, 10, |i| i as f64 + 1.0);
        let cfg = PatchConfig::tiling([2, 2, 4]);
        let layout = cfg.layout(signal_dims(&s)).unwrap();
        assert_eq!(layout.counts, [2, 2, 3]);
        assert_eq!(layout.padded, [4, 4, 12]);
        let m = extract_patches(&s, &cfg).unwrap();
        let total: f64 = m.iter().sum();
        let expect: f64 = s.as_slice().iter().sum();
        assert_eq!(total, expect);
        let back = aggregate_patches(&m, &s, &cfg).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn overlapping_constant_round_trip() {
        let s = signal(3, 2, 9, |_| 0.7);
        let cfg = PatchConfig {
            shape: [2, 2, 3],
            stride: [1, 1, 1],
        };
        let m = extract_patches(&s, &cfg).unwrap();
        let back = aggregate_patches(&m, &s, &cfg).unwrap();
        assert!(back.as_slice().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn zero_patches_zero_signal() {
        let s = signal(2, 2, 8, |i| i as f64);
        let cfg = PatchConfig::tiling([2, 2, 4]);
        let back = aggregate_patches(&DMatrix::zeros(16, 2), &s, &cfg).unwrap();
        assert!(back.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_column_count_rejected() {
        let s = signal(2, 2, 8, |i| i as f64);
        let cfg = PatchConfig::tiling([2, 2, 4]);
        assert!(matches!(
            aggregate_patches(&DMatrix::zeros(16, 3), &s, &cfg),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn tiling_round_trip_is_bit_exact(
            nx in 1usize..5, ny in 1usize..5, q in 1usize..40,
            rx in 1usize..4, ry in 1usize..4, rq in 1usize..20,
            seed in 0u64..1000,
        ) {
            let s = signal(nx, ny, q, |i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 7.0 - 50.0);
            let cfg = PatchConfig::tiling([rx, ry, rq]);
            let m = extract_patches(&s, &cfg).unwrap();
            let back = aggregate_patches(&m, &s, &cfg).unwrap();
            prop_assert_eq!(back.as_slice(), s.as_slice());
        }
    }

    #[test]
    fn update_s_recovers_sparse_code() {
        let dict = SignalDictionary::dct([2, 2, 8]);
        let mut s0 = DMatrix::zeros(32, 5);
        // 4 of 160 entries, distinct magnitudes
        s0[(0, 0)] = 3.0;
        s0[(7, 1)] = -2.0;
        s0[(31, 3)] = 1.5;
        s0[(12, 4)] = -4.0;
        let x = synthesize(&dict, &s0);
        let code = update_s(&x, &x, &dict, 4.0 / 160.0).unwrap();
        assert_eq!(code.kept, 4);
        assert!((code.coeffs - s0).abs().max() < 1e-12);
        assert!((code.threshold - 1.5).abs() < 1e-12);
    }

    #[test]
    fn update_s_extremes() {
        let dict = SignalDictionary::dct([1, 2, 4]);
        let a = DMatrix::from_fn(8, 3, |i, j| (i * 3 + j) as f64 - 5.0);
        let b = DMatrix::from_fn(8, 3, |i, j| (i as f64 - j as f64).sin());
        let full = update_s(&a, &b, &dict, 1.0).unwrap();
        let m = (&a + &b) * 0.5;
        let direct = dict.matrix().transpose() * m;
        assert!((full.coeffs - direct).abs().max() < 1e-12);
        let none = update_s(&a, &b, &dict, 0.0).unwrap();
        assert_eq!(none.kept, 0);
        assert!(none.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn update_s_support_swap_never_helps() {
        let dict = SignalDictionary::dct([2, 1, 4]);
        let a = DMatrix::from_fn(8, 2, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let b = DMatrix::from_fn(8, 2, |i, j| ((i + 2 * j) % 4) as f64);
        let code = update_s(&a, &b, &dict, 0.25).unwrap();
        let d = dict.matrix();
        let obj = |s: &DMatrix<f64>| {
            let ds = &d * s;
            (&a - &ds).norm_squared() + (&b - &ds).norm_squared()
        };
        let best = obj(&code.coeffs);
        let c = d.transpose() * ((&a + &b) * 0.5);
        let kept: Vec<usize> = (0..16).filter(|&i| code.coeffs.as_slice()[i] != 0.0).collect();
        let dropped: Vec<usize> = (0..16).filter(|i| !kept.contains(i)).collect();
        for &k in &kept {
            for &r in &dropped {
                let mut s = code.coeffs.clone();
                s.as_mut_slice()[k] = 0.0;
                s.as_mut_slice()[r] = c.as_slice()[r];
                assert!(obj(&s) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn top_k_ties_prefer_low_index() {
        assert_eq!(top_k_indices(&[1.0, -2.0, 2.0, 0.5], 2), vec![1, 2]);
        assert_eq!(top_k_indices(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
        assert!(top_k_indices(&[1.0], 0).is_empty());
    }
}
