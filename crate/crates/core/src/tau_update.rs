//! Per-bin signal update: `(d - N) ln(1 - tau) - d ln tau + mu (tau - s)^2`.

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::photon::nll_values;
use crate::signal::{PhotonHistogram, TransientSignal};

const EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinProblem {
    pub d: u64,
    pub n: u64,
    pub mu: f64,
    pub s: f64,
}

impl BinProblem {
    pub fn objective(&self, tau: f64) -> f64 {
        crate::photon::nll_bin(self.d, self.n, tau) + self.mu * (tau - self.s) * (tau - self.s)
    }

    /// `x^3 - (s + 1) x^2 + (s - N / 2mu) x + d / 2mu`, whose root in `(0, 1)`
    /// is the minimizer when `0 < d < N`.
    pub fn cubic(&self, x: f64) -> f64 {
        let h = 0.5 / self.mu;
        ((x - (self.s + 1.0)) * x + (self.s - self.n as f64 * h)) * x + self.d as f64 * h
    }

    fn cubic_derivative(&self, x: f64) -> f64 {
        let h = 0.5 / self.mu;
        (3.0 * x - 2.0 * (self.s + 1.0)) * x + (self.s - self.n as f64 * h)
    }
}

/// Exact minimizer over `[0, 1]`.
pub fn solve_bin(p: &BinProblem) -> f64 {
    debug_assert!(p.mu > 0.0 && p.d <= p.n);
    let ratio = 2.0 * p.n as f64 / p.mu;
    if p.d == 0 {
        let one_s = 1.0 - p.s;
        return (1.0 - 0.5 * (one_s + (one_s * one_s + ratio).sqrt())).max(0.0);
    }
    if p.d == p.n {
        return (0.5 * (p.s + (p.s * p.s + ratio).sqrt())).min(1.0);
    }
    cubic_root(p)
}

/// Safeguarded Newton on the cubic; `p > 0` left of the root and `p < 0`
/// right of it, so the bracket `[lo, hi]` always contains it.
fn cubic_root(p: &BinProblem) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let d = p.d as f64 / p.n as f64;
    let mut x = d.clamp(EPS, 1.0 - EPS);
    let mut best = (f64::INFINITY, x);
    for _ in 0..200 {
        let v = p.cubic(x);
        if v.abs() < best.0 {
            best = (v.abs(), x);
        }
        if v == 0.0 {
            break;
        }
        if v > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let dv = p.cubic_derivative(x);
        let newton = x - v / dv;
        let next = if dv != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == x {
            break;
        }
        x = next;
    }
    best.1.clamp(EPS, 1.0 - EPS)
}

/// Blended target and weight: `mu = lambda_t + lambda`,
/// `s = (lambda_t P*(DS) + lambda Au) / mu`.
pub fn blend(pds: f64, au: f64, lambda_t: f64, lambda: f64) -> (f64, f64) {
    let mu = lambda_t + lambda;
    (mu, (lambda_t * pds + lambda * au) / mu)
}

/// Solves every bin independently; requires a non-overlapping patch tiling
/// so that the patch residual separates per bin.
pub fn update_tau(
    hist: &PhotonHistogram,
    pds: &TransientSignal,
    au: &TransientSignal,
    lambda_t: f64,
    lambda: f64,
    tiling: bool,
) -> Result<TransientSignal> {
    if !tiling {
        return Err(Error::Config(
            "the signal update needs a non-overlapping patch tiling".into(),
        ));
    }
    if !(lambda_t > 0.0 && lambda > 0.0 && lambda_t.is_finite() && lambda.is_finite()) {
        return Err(Error::Config(format!(
            "signal update weights must be positive, got {lambda_t} and {lambda}"
        )));
    }
    let dim = hist.counts.dim();
    if pds.values.dim() != dim || au.values.dim() != dim {
        return Err(Error::mismatch(format!("{dim:?}"), format!("{:?}", pds.values.dim())));
    }
    let counts: Vec<u32> = hist.counts.iter().copied().collect();
    let (a, b) = (pds.as_slice(), au.as_slice());
    let values: Vec<f64> = (0..counts.len())
        .into_par_iter()
        .map(|i| {
            let (mu, s) = blend(a[i], b[i], lambda_t, lambda);
            solve_bin(&BinProblem {
                d: u64::from(counts[i]),
                n: hist.pulses,
                mu,
                s,
            })
        })
        .collect();
    TransientSignal::from_vec(&hist.geometry, values)
}

/// `NLL(tau0) / |tau0 - (P*(DS) + Au) / 2|^2`, falling back to 1 when the
/// ratio is not a positive finite number.
pub fn adaptive_lambda(
    hist: &PhotonHistogram,
    tau0: &TransientSignal,
    pds: &TransientSignal,
    au: &TransientSignal,
) -> f64 {
    let num = nll_values(tau0.as_slice(), hist);
    let den: f64 = tau0
        .as_slice()
        .iter()
        .zip(pds.as_slice().iter().zip(au.as_slice()))
        .map(|(t, (p, a))| {
            let r = t - 0.5 * (p + a);
            r * r
        })
        .sum();
    let lambda = num / den;
    if lambda.is_finite() && lambda > 0.0 {
        lambda
    } else {
        warn!("adaptive lambda degenerate (numerator {num}, denominator {den}); using 1");
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::MeasurementGeometry;
    use ndarray::Array2;

    fn grid_min(p: &BinProblem, n: usize) -> f64 {
        (0..=n)
            .map(|i| p.objective(i as f64 / n as f64))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn empty_bin_with_zero_target_is_zero() {
        for &(n, mu) in &[(1u64, 1.0), (100, 1e-3), (1_000_000, 1e6)] {
            assert_eq!(solve_bin(&BinProblem { d: 0, n, mu, s: 0.0 }), 0.0);
        }
    }

    #[test]
    fn full_bin_closed_form() {
        let p = BinProblem {
            d: 100,
            n: 100,
            mu: 1e6,
            s: 0.5,
        };
        let t = solve_bin(&p);
        let expect = 0.5 * (0.5 + (0.25f64 + 2e-4).sqrt());
        assert!((t - expect).abs() < 1e-15);
        assert!((t - 0.50009998).abs() < 1e-8);
        assert!(p.objective(t) <= grid_min(&p, 1_000_000) + 1e-9);
    }

    #[test]
    fn interior_bin_is_cubic_root_and_global_min() {
        let p = BinProblem {
            d: 5,
            n: 100,
            mu: 50.0,
            s: 0.05,
        };
        let t = solve_bin(&p);
        assert!(t > 0.0 && t < 1.0);
        assert!(p.cubic(t).abs() <= 1e-12);
        assert!(p.objective(t) <= grid_min(&p, 100_000) + 1e-9);
    }

    #[test]
    fn monotone_in_target() {
        for &(d, n, mu) in &[(0u64, 50u64, 10.0), (3, 50, 10.0), (50, 50, 10.0), (7, 20, 0.5)] {
            let mut last = -1.0;
            for i in 0..=40 {
                let s = -1.0 + i as f64 * 0.075;
                let t = solve_bin(&BinProblem { d, n, mu, s });
                assert!(t >= last - 1e-12, "d={d} s={s}");
                last = t;
            }
        }
    }

    fn hist(counts: Vec<u32>, pulses: u64, q: usize) -> PhotonHistogram {
        let p = counts.len() / q;
        let g = MeasurementGeometry::confocal_raster(p, 1, 0.1, [0.0, 0.0], 32e-12, q).unwrap();
        PhotonHistogram {
            geometry: g,
            counts: Array2::from_shape_vec((p, q), counts).unwrap(),
            pulses,
            rng_id: "test".into(),
            seed: 0,
        }
    }

    #[test]
    fn update_with_zero_targets_and_no_counts() {
        let h = hist(vec![0; 12], 1000, 4);
        let z = TransientSignal::zeros(&h.geometry);
        let t = update_tau(&h, &z, &z, 1.0, 1.0, true).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == 0.0));
        assert!(matches!(update_tau(&h, &z, &z, 1.0, 1.0, false), Err(Error::Config(_))));
    }

    #[test]
    fn data_dominated_update_is_empirical_rate() {
        let counts: Vec<u32> = (0..16).map(|i| i * 1000).collect();
        let h = hist(counts.clone(), 1_000_000, 8);
        let g = TransientSignal::from_vec(&h.geometry, vec![0.3; 16]).unwrap();
        let t = update_tau(&h, &g, &g, 5e-7, 5e-7, true).unwrap();
        for (v, c) in t.as_slice().iter().zip(&counts) {
            assert!((v - f64::from(*c) / 1e6).abs() <= 1e-3);
        }
    }

    #[test]
    fn adaptive_lambda_single_bin() {
        let h = hist(vec![5], 100, 1);
        let tau0 = TransientSignal::from_vec(&h.geometry, vec![0.05]).unwrap();
        let blend = TransientSignal::from_vec(&h.geometry, vec![0.03]).unwrap();
        let l = adaptive_lambda(&h, &tau0, &blend, &blend);
        let expect = (-95.0 * 0.95f64.ln() - 5.0 * 0.05f64.ln()) / 0.0004;
        assert!((l - expect).abs() <= 1e-9 * expect);
        assert!((l - 49628.81).abs() < 0.01);
        let far = TransientSignal::from_vec(&h.geometry, vec![0.01]).unwrap();
        let l2 = adaptive_lambda(&h, &tau0, &far, &far);
        assert!((l / l2 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn adaptive_lambda_empty_data_falls_back() {
        let h = hist(vec![0; 4], 100, 4);
        let z = TransientSignal::zeros(&h.geometry);
        let b = TransientSignal::from_vec(&h.geometry, vec![0.1; 4]).unwrap();
        assert_eq!(adaptive_lambda(&h, &z, &b, &b), 1.0);
    }
}
