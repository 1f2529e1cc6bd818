//! Alternating reconstruction: surface, block triplet, signal code, signal,
//! then volume, once per outer iteration.

mod objective;
mod volume;

pub use objective::{objective_terms, ObjectiveInputs, ObjectiveTerms, ObjectiveWeights};
pub use volume::{
    balance_weight, update_u, volume_objective, volume_terms, VolumePriors, VolumeTerms,
    VolumeWeights,
};

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::grid::{AlbedoVolume, VoxelGrid};
use crate::patch::{
    aggregate_patches, block_match, blocks_extract, extract_patches, synthesize, triplet_residual,
    update_s, update_triplet, BlockConfig, BlockMatches, DictionaryTriplet, PatchConfig,
    SignalDictionary, SparseCode,
};
use crate::signal::{MeasurementGeometry, PhotonHistogram, TransientSignal};
use crate::solvers::{cg_solve, l1_ls_bregman, norm0, norm1, norm2, BregmanParams, NormalMap};
use crate::surface::SurfaceG;
use crate::surfaciation::surfaciate;
use crate::tau_update::{adaptive_lambda, update_tau};

/// Multipliers of the balanced prior weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Balance {
    pub signal: f64,
    pub block: f64,
    pub surface: f64,
    /// Upper bound on each weight, in units of its multiplier.
    pub cap: f64,
}

impl Default for Balance {
    fn default() -> Self {
        Balance {
            signal: 1.0,
            block: 1.0,
            surface: 1.0,
            cap: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SscrConfig {
    pub outer_iters: usize,
    pub k_sparse: f64,
    /// Bregman rounds and CG caps for initialization and every volume update.
    pub bregman: BregmanParams,
    /// Keep fraction of the signal code.
    pub rho: f64,
    /// Keep fraction of the block coefficients.
    pub rho_u: f64,
    /// Signal patches; `None` picks `min(N_x, 3) x min(N_y, 3) x 64` tiles.
    pub patch: Option<PatchConfig>,
    pub block: BlockConfig,
    pub triplet_sweeps: usize,
    pub balance: Balance,
    /// Reconstruct with the cosine-weighted forward model.
    pub cosine_factor: bool,
}

impl Default for SscrConfig {
    fn default() -> Self {
        SscrConfig {
            outer_iters: 5,
            k_sparse: 10.0,
            bregman: BregmanParams::default(),
            rho: 0.02,
            rho_u: 0.05,
            patch: None,
            block: BlockConfig::default(),
            triplet_sweeps: 1,
            balance: Balance::default(),
            cosine_factor: false,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl SscrConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("outer_iters", self.outer_iters),
            ("bregman.outer_iters", self.bregman.outer_iters),
            ("bregman.cg.max_iter", self.bregman.cg.max_iter),
            ("triplet_sweeps", self.triplet_sweeps),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        positive("k_sparse", self.k_sparse)?;
        positive("bregman.cg.rel_tol", self.bregman.cg.rel_tol)?;
        positive("balance.signal", self.balance.signal)?;
        positive("balance.block", self.balance.block)?;
        positive("balance.surface", self.balance.surface)?;
        positive("balance.cap", self.balance.cap)?;
        for (name, v) in [("rho", self.rho), ("rho_u", self.rho_u)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if let Some(p) = &self.patch {
            p.validate()?;
        }
        Ok(())
    }

    /// The resolved patch configuration; must tile the signal.
    pub fn patch_for(&self, geometry: &MeasurementGeometry) -> Result<PatchConfig> {
        let (nx, ny) = geometry.scan_shape();
        let dims = [nx, ny, geometry.num_bins];
        let p = self.patch.unwrap_or_else(|| PatchConfig::default_for(dims));
        p.layout(dims)?;
        if !p.is_tiling() {
            return Err(Error::Config(format!(
                "patch stride {:?} must equal patch shape {:?}",
                p.stride, p.shape
            )));
        }
        Ok(p)
    }
}

/// Stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InitTau,
    InitU,
    Surface,
    Triplet,
    SignalCode,
    Signal,
    Volume,
    FinalSurface,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::InitTau => "init_tau",
            Stage::InitU => "init_u",
            Stage::Surface => "surface",
            Stage::Triplet => "triplet",
            Stage::SignalCode => "signal_code",
            Stage::Signal => "signal",
            Stage::Volume => "volume",
            Stage::FinalSurface => "final_surface",
        }
    }

    /// Per-iteration order.
    pub const OUTER: [Stage; 5] = [
        Stage::Surface,
        Stage::Triplet,
        Stage::SignalCode,
        Stage::Signal,
        Stage::Volume,
    ];
}

/// Resolved adaptive parameters of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationParams {
    pub iteration: usize,
    pub r_ut: f64,
    pub r_u: f64,
    pub r_g: f64,
    pub weights: ObjectiveWeights,
    pub signal_threshold: f64,
    pub signal_kept: usize,
    pub block_threshold: f64,
    pub block_kept: usize,
    pub degenerate_svd: usize,
    /// Largest `|M M^T - I|` entry over `D`, `D_s` and `D_n` after the updates.
    pub orthogonality_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub s_imp: f64,
    pub mu_s: f64,
    /// `lambda_t = lambda`, fixed at the first iteration.
    pub lambda: Option<f64>,
    pub iterations: Vec<IterationParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Objective after the volume update.
    pub terms: ObjectiveTerms,
    /// Objective with the same auxiliaries before the volume update.
    pub objective_before_u: f64,
    /// `|tau - A u| / |tau|` for the current signal.
    pub misfit: f64,
    /// `|tau0 - A u| / |tau0|`.
    pub data_misfit: f64,
    pub foreground: usize,
    pub u_l1: f64,
    pub u_nonzeros: usize,
}

#[derive(Debug, Clone)]
pub struct SscrState {
    pub tau: TransientSignal,
    pub u: AlbedoVolume,
    pub g: SurfaceG,
    pub triplet: DictionaryTriplet,
    pub matches: Option<BlockMatches>,
    pub code: Option<SparseCode>,
    pub patch: PatchConfig,
    pub params: ParamRecord,
    pub trace: Vec<TraceRow>,
    pub stages: Vec<Stage>,
}

/// `tau0 = d / N`.
pub fn init_tau(hist: &PhotonHistogram) -> Result<TransientSignal> {
    hist.validate()?;
    let n = hist.pulses as f64;
    let full = hist.counts.iter().filter(|&&c| u64::from(c) == hist.pulses).count();
    if full > 0 {
        warn!("{full} bins saturated (d = N); their initial intensity is 1");
    }
    Ok(TransientSignal {
        geometry: hist.geometry.clone(),
        values: hist.counts.mapv(|c| f64::from(c) / n),
    })
}

/// `k_sparse |tau0 - A u_LS|^2 / |u_LS|_1`.
pub fn implicit_sparsity(k_sparse: f64, misfit_sq: f64, l1: f64) -> f64 {
    k_sparse * misfit_sq / l1
}

/// `(|u_LS|_0 / (2 |u_LS|_1)) s_imp`.
pub fn bregman_penalty(nonzeros: usize, l1: f64, s_imp: f64) -> f64 {
    nonzeros as f64 / (2.0 * l1) * s_imp
}

#[derive(Debug, Clone)]
pub struct InitU {
    pub u: AlbedoVolume,
    pub u_ls: AlbedoVolume,
    pub s_imp: f64,
    pub mu_s: f64,
}

/// Back-projection, least-squares CG, then L1-regularized refinement.
/// Fails with `ZeroSignal` when `tau0` or the least-squares volume vanishes.
pub fn init_u(tau0: &TransientSignal, op: &ForwardOperator, cfg: &SscrConfig) -> Result<InitU> {
    let tau = tau0.as_slice();
    if tau.iter().all(|&t| t == 0.0) {
        return Err(Error::ZeroSignal);
    }
    let bp = op.adjoint(tau0)?;
    let normal = NormalMap { op, shift: 0.0 };
    let u_ls = cg_solve(&normal, bp.as_slice(), Some(bp.as_slice()), &cfg.bregman.cg)?.x;
    let l1 = norm1(&u_ls);
    if !(l1 > 0.0 && l1.is_finite()) {
        warn!("least-squares volume is zero; the signal has no support in the grid");
        return Err(Error::ZeroSignal);
    }
    let mut au = vec![0.0; op.signal_len()];
    op.apply_flat(&u_ls, &mut au);
    let misfit_sq: f64 = tau.iter().zip(&au).map(|(t, a)| (t - a) * (t - a)).sum();
    let s_imp = implicit_sparsity(cfg.k_sparse, misfit_sq, l1);
    let mut mu_s = bregman_penalty(norm0(&u_ls), l1, s_imp);
    if !(mu_s.is_finite() && mu_s > 0.0) {
        // exact fit: no shrinkage, so any positive penalty works; use the
        // Rayleigh quotient of A^T A to keep the scale
        mu_s = (norm2(&au) / norm2(&u_ls)).powi(2);
        warn!("Bregman penalty degenerate; using {mu_s:e}");
    }
    let out = l1_ls_bregman(op, tau, s_imp, mu_s, &cfg.bregman, Some(&u_ls))?;
    info!("s_imp = {s_imp:e}, mu_s = {mu_s:e}");
    Ok(InitU {
        u: AlbedoVolume::from_vec(&op.grid, out.v)?,
        u_ls: AlbedoVolume::from_vec(&op.grid, u_ls)?,
        s_imp,
        mu_s,
    })
}

/// Largest entry of `|M M^T - I|`.
pub fn orthogonality_error(m: &DMatrix<f64>) -> f64 {
    let g = m * m.transpose();
    g.iter()
        .enumerate()
        .map(|(idx, v)| {
            let (r, c) = (idx % g.nrows(), idx / g.nrows());
            (v - if r == c { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max)
}

fn rel(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn flat_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Auxiliaries held fixed while the objective is evaluated.
struct Auxiliaries<'a> {
    code: &'a SparseCode,
    ds: &'a DMatrix<f64>,
    triplet: &'a DictionaryTriplet,
    matches: &'a BlockMatches,
    g: &'a [f64],
}

fn evaluate(
    hist: &PhotonHistogram,
    tau: &TransientSignal,
    u: &AlbedoVolume,
    au: &TransientSignal,
    patch: &PatchConfig,
    aux: &Auxiliaries,
    w: &ObjectiveWeights,
) -> Result<ObjectiveTerms> {
    let ptau = extract_patches(tau, patch)?;
    let pau = extract_patches(au, patch)?;
    let blocks = blocks_extract(u.as_slice(), aux.matches);
    Ok(objective_terms(
        &ObjectiveInputs {
            hist,
            tau: tau.as_slice(),
            au: au.as_slice(),
            ptau: &ptau,
            pau: &pau,
            ds: aux.ds,
            s_nonzeros: aux.code.kept,
            u: u.as_slice(),
            g: aux.g,
            block_residual: triplet_residual(&blocks, aux.triplet),
            c_nonzeros: aux.triplet.nonzeros(),
        },
        w,
    ))
}

/// Objective of the current state under the weights of its last iteration;
/// 0 before any iteration has run.
pub fn objective(state: &SscrState, hist: &PhotonHistogram, op: &ForwardOperator) -> Result<ObjectiveTerms> {
    let (Some(it), Some(code), Some(matches)) =
        (state.params.iterations.last(), &state.code, &state.matches)
    else {
        return Ok(ObjectiveTerms::default());
    };
    let dict = SignalDictionary::dct(state.patch.shape);
    let ds = synthesize(&dict, &code.coeffs);
    let au = op.forward(&state.u)?;
    let g = state.g.to_volume();
    let aux = Auxiliaries {
        code,
        ds: &ds,
        triplet: &state.triplet,
        matches,
        g: g.as_slice(),
    };
    evaluate(hist, &state.tau, &state.u, &au, &state.patch, &aux, &it.weights)
}

fn staged<T>(stages: &mut Vec<Stage>, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    stages.push(stage);
    f().map_err(|e| e.in_stage(stage.name()))
}

/// Full reconstruction from a photon histogram.
pub fn sscr_reconstruct(hist: &PhotonHistogram, grid: &VoxelGrid, cfg: &SscrConfig) -> Result<SscrState> {
    cfg.validate()?;
    hist.validate()?;
    cfg.block.validate(grid.dims)?;
    let op = ForwardOperator::new(grid, &hist.geometry)?.with_cosine(cfg.cosine_factor);
    let patch = cfg.patch_for(&hist.geometry)?;
    let dict = SignalDictionary::dct(patch.shape);
    let dict_orth = orthogonality_error(&dict.matrix());
    let mut stages = Vec::new();

    let tau0 = staged(&mut stages, Stage::InitTau, || init_tau(hist))?;
    let mut state = SscrState {
        tau: tau0.clone(),
        u: AlbedoVolume::zeros(grid),
        g: SurfaceG::empty(grid),
        triplet: DictionaryTriplet::dct(cfg.block.size, cfg.block.neighbors),
        matches: None,
        code: None,
        patch,
        params: ParamRecord::default(),
        trace: Vec::new(),
        stages: Vec::new(),
    };
    let init = match staged(&mut stages, Stage::InitU, || init_u(&tau0, &op, cfg)) {
        Ok(init) => init,
        Err(Error::Stage { source, .. }) if matches!(*source, Error::ZeroSignal) => {
            warn!("zero signal; returning the zero volume");
            state.stages = stages;
            return Ok(state);
        }
        Err(e) => return Err(e),
    };
    state.params.s_imp = init.s_imp;
    state.params.mu_s = init.mu_s;
    state.u = init.u;
    let tau0_norm = norm2(tau0.as_slice());
    let mut au = op.forward(&state.u)?;

    for k in 1..=cfg.outer_iters {
        let u = state.u.clone();
        let g = staged(&mut stages, Stage::Surface, || surfaciate(&u))?;

        let (matches, update) = staged(&mut stages, Stage::Triplet, || {
            let matches = block_match(u.as_slice(), grid.dims, &cfg.block)?;
            let blocks = blocks_extract(u.as_slice(), &matches);
            let update = update_triplet(&blocks, &state.triplet, cfg.rho_u, cfg.triplet_sweeps)?;
            Ok((matches, update))
        })?;
        let triplet = update.triplet;

        let (code, ds, pds) = staged(&mut stages, Stage::SignalCode, || {
            let ptau = extract_patches(&state.tau, &patch)?;
            let pau = extract_patches(&au, &patch)?;
            let code = update_s(&ptau, &pau, &dict, cfg.rho)?;
            let ds = synthesize(&dict, &code.coeffs);
            let pds = aggregate_patches(&ds, &state.tau, &patch)?;
            Ok((code, ds, pds))
        })?;

        let lambda = match state.params.lambda {
            Some(l) => l,
            None => {
                let l = adaptive_lambda(hist, &tau0, &pds, &au);
                info!("lambda_t = lambda = {l:e}");
                state.params.lambda = Some(l);
                l
            }
        };
        let tau = staged(&mut stages, Stage::Signal, || {
            update_tau(hist, &pds, &au, lambda, lambda, patch.is_tiling())
        })?;

        let targets = triplet.reconstruct();
        let g_vol = g.to_volume();
        let priors = VolumePriors {
            pds: pds.as_slice(),
            g: g_vol.as_slice(),
            blocks: Some((&matches, &targets)),
        };
        let start = volume_terms(&op, tau.as_slice(), u.as_slice(), &priors);
        let b = &cfg.balance;
        let vw = VolumeWeights {
            r_ut: balance_weight(b.signal, start.data, start.signal, b.cap),
            r_u: balance_weight(b.block, start.data, start.block, b.cap),
            r_g: balance_weight(b.surface, start.data, start.surface, b.cap),
            s_u: init.s_imp,
            mu_s: init.mu_s,
        };
        let weights = ObjectiveWeights {
            lambda_t: lambda,
            lambda,
            lambda_ut: vw.r_ut * lambda,
            lambda_u: vw.r_u * lambda,
            lambda_g: vw.r_g * lambda,
            l1: init.s_imp * lambda,
            lambda_pt: 2.0 * code.threshold * code.threshold,
            lambda_pu: triplet.threshold * triplet.threshold,
        };
        let aux = Auxiliaries {
            code: &code,
            ds: &ds,
            triplet: &triplet,
            matches: &matches,
            g: g_vol.as_slice(),
        };
        let before = evaluate(hist, &tau, &u, &au, &patch, &aux, &weights)?.total;
        let u_new = staged(&mut stages, Stage::Volume, || {
            let v = update_u(&op, tau.as_slice(), &priors, &vw, u.as_slice(), &cfg.bregman)?;
            AlbedoVolume::from_vec(grid, v)
        })?;
        au = op.forward(&u_new)?;
        let terms = evaluate(hist, &tau, &u_new, &au, &patch, &aux, &weights)?;
        if !terms.total.is_finite() {
            return Err(Error::Validation(format!("objective is not finite at iteration {k}"))
                .in_stage(Stage::Volume.name()));
        }
        info!(
            "iteration {k}: objective {:.6e} (before volume update {before:.6e}), r = ({:.3e}, {:.3e}, {:.3e})",
            terms.total, vw.r_ut, vw.r_u, vw.r_g
        );
        state.params.iterations.push(IterationParams {
            iteration: k,
            r_ut: vw.r_ut,
            r_u: vw.r_u,
            r_g: vw.r_g,
            weights,
            signal_threshold: code.threshold,
            signal_kept: code.kept,
            block_threshold: triplet.threshold,
            block_kept: triplet.nonzeros(),
            degenerate_svd: update.degenerate,
            orthogonality_error: dict_orth
                .max(orthogonality_error(&triplet.ds))
                .max(orthogonality_error(&triplet.dn)),
        });
        state.trace.push(TraceRow {
            iteration: k,
            terms,
            objective_before_u: before,
            misfit: rel(flat_dist(tau.as_slice(), au.as_slice()), norm2(tau.as_slice())),
            data_misfit: rel(flat_dist(tau0.as_slice(), au.as_slice()), tau0_norm),
            foreground: g.foreground_count(),
            u_l1: norm1(u_new.as_slice()),
            u_nonzeros: norm0(u_new.as_slice()),
        });
        state.tau = tau;
        state.u = u_new;
        state.g = g;
        state.triplet = triplet;
        state.matches = Some(matches);
        state.code = Some(code);
    }

    let u = state.u.clone();
    state.g = staged(&mut stages, Stage::FinalSurface, || surfaciate(&u))?;
    state.stages = stages;
    Ok(state)
}
