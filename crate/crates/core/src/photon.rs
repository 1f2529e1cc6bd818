//! Bernoulli photon-event simulation and its negative log-likelihood.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{PhotonHistogram, TransientSignal};

/// Identifies the sampling scheme: ChaCha8 keyed by the seed, one stream per
/// bin at `p * Q + q`, one binomial draw per stream.
pub const RNG_ID: &str = "chacha8-binstream-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default)]
    pub dark_rate: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            eta: 1.0,
            dark_rate: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::Config(format!(
                "dark_rate must be >= 0, got {}",
                self.dark_rate
            )));
        }
        Ok(())
    }

    /// Per-pulse event probability of a bin with intensity `tau`.
    pub fn probability(&self, tau: f64) -> f64 {
        self.eta * tau + self.dark_rate
    }
}

/// Draws `d_pq ~ Binomial(N, eta tau_pq + dark_rate)` independently per bin.
///
/// Each bin owns the ChaCha8 stream `p * Q + q` under `seed`, so the output
/// does not depend on iteration order or thread count.
pub fn sample_histogram(
    tau: &TransientSignal,
    pulses: u64,
    model: &NoiseModel,
    seed: u64,
) -> Result<PhotonHistogram> {
    model.validate()?;
    tau.geometry.validate()?;
    if pulses == 0 {
        return Err(Error::Config("pulse count N must be positive".into()));
    }
    let (np, nq) = tau.values.dim();
    if let Some(((p, q), &t)) = tau
        .values
        .indexed_iter()
        .find(|(_, &t)| !(model.probability(t) < 1.0 && model.probability(t) >= 0.0))
    {
        let prob = model.probability(t);
        if prob >= 1.0 || prob.is_nan() {
            return Err(Error::ProbabilityOverflow { pair: p, bin: q, prob });
        }
        return Err(Error::Validation(format!(
            "negative event probability {prob} at (p={p}, q={q})"
        )));
    }
    if pulses > u64::from(u32::MAX) {
        return Err(Error::Config("pulse count must fit in 32 bits".into()));
    }
    let probs = tau.as_slice();
    let counts: Vec<u32> = (0..np * nq)
        .into_par_iter()
        .map(|idx| {
            let prob = model.probability(probs[idx]);
            if prob == 0.0 {
                return 0;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            let dist = Binomial::new(pulses, prob).expect("probability checked above");
            dist.sample(&mut rng) as u32
        })
        .collect();
    Ok(PhotonHistogram {
        geometry: tau.geometry.clone(),
        counts: Array2::from_shape_vec((np, nq), counts).expect("shape matches"),
        pulses,
        rng_id: RNG_ID.to_string(),
        seed,
    })
}

/// Bin negative log-likelihood `(d - N) ln(1 - tau) - d ln tau`, with
/// `0 ln 0 = 0`.
pub fn nll_bin(d: u64, n: u64, tau: f64) -> f64 {
    let (d, n) = (d as f64, n as f64);
    let miss = n - d;
    let a = if miss == 0.0 { 0.0 } else { -miss * (1.0 - tau).ln() };
    let b = if d == 0.0 { 0.0 } else { -d * tau.ln() };
    a + b
}

/// Sum of [`nll_bin`] over all bins; `+inf` when a bin is impossible.
pub fn nll(tau: &TransientSignal, hist: &PhotonHistogram) -> Result<f64> {
    if tau.values.dim() != hist.counts.dim() {
        return Err(Error::mismatch(
            format!("{:?}", hist.counts.dim()),
            format!("{:?}", tau.values.dim()),
        ));
    }
    Ok(nll_values(tau.as_slice(), hist))
}

pub(crate) fn nll_values(tau: &[f64], hist: &PhotonHistogram) -> f64 {
    tau.iter()
        .zip(hist.counts.iter())
        .map(|(&t, &d)| nll_bin(u64::from(d), hist.pulses, t))
        .sum()
}
