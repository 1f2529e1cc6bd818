//! Few-shot non-line-of-sight reconstruction with signal-surface collaborative
//! regularization.

pub mod baselines;
pub mod driver;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod patch;
pub mod photon;
pub mod scene;
pub mod signal;
pub mod solvers;
pub mod surface;
pub mod surfaciation;
pub mod tau_update;

pub use driver::{sscr_reconstruct, SscrConfig, SscrState};
pub use error::{Error, Result};
pub use forward::{adjoint, forward, ForwardOperator};
pub use grid::{AlbedoVolume, Vec3, VoxelGrid};
pub use scene::SceneShape;
pub use signal::{MeasurementGeometry, MeasurementPair, PhotonHistogram, TransientSignal};
pub use surface::{SurfaceG, SurfacePixel};
