//! Term-by-term evaluation of the joint objective. The surface prior has no
//! numeric value; it is realized by surfaciation and reported as 0.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::photon::nll_values;
use crate::signal::PhotonHistogram;

/// Absolute weights of every term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub lambda_t: f64,
    pub lambda: f64,
    pub lambda_ut: f64,
    pub lambda_u: f64,
    pub lambda_g: f64,
    /// Absolute L1 weight, `lambda * s_u`.
    pub l1: f64,
    /// `2 t^2` for the signal code threshold `t`.
    pub lambda_pt: f64,
    /// `t_u^2` for the block code threshold `t_u`.
    pub lambda_pu: f64,
}

/// Everything the objective reads, already in flat or patch form.
pub struct ObjectiveInputs<'a> {
    pub hist: &'a PhotonHistogram,
    pub tau: &'a [f64],
    pub au: &'a [f64],
    pub ptau: &'a DMatrix<f64>,
    pub pau: &'a DMatrix<f64>,
    /// `D S`.
    pub ds: &'a DMatrix<f64>,
    pub s_nonzeros: usize,
    pub u: &'a [f64],
    pub g: &'a [f64],
    /// `sum |B u_i - D_s C_i D_n^T|^2`.
    pub block_residual: f64,
    pub c_nonzeros: usize,
}

/// Weighted terms; `total` is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub nll: f64,
    pub signal_patch: f64,
    pub volume_patch: f64,
    pub signal_sparsity: f64,
    pub data: f64,
    pub l1: f64,
    pub surface: f64,
    pub block: f64,
    pub surface_prior: f64,
    pub total: f64,
}

fn sq_dist<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn objective_terms(x: &ObjectiveInputs, w: &ObjectiveWeights) -> ObjectiveTerms {
    let mut t = ObjectiveTerms {
        nll: nll_values(x.tau, x.hist),
        signal_patch: w.lambda_t * sq_dist(x.ptau.iter(), x.ds.iter()),
        volume_patch: w.lambda_ut * sq_dist(x.pau.iter(), x.ds.iter()),
        signal_sparsity: w.lambda_pt * x.s_nonzeros as f64,
        data: w.lambda * sq_dist(x.tau, x.au),
        l1: w.l1 * x.u.iter().map(|v| v.abs()).sum::<f64>(),
        surface: w.lambda_g * sq_dist(x.u, x.g),
        block: w.lambda_u * (x.block_residual + w.lambda_pu * x.c_nonzeros as f64),
        surface_prior: 0.0,
        total: 0.0,
    };
    t.total = t.nll
        + t.signal_patch
        + t.volume_patch
        + t.signal_sparsity
        + t.data
        + t.l1
        + t.surface
        + t.block
        + t.surface_prior;
    t
}
