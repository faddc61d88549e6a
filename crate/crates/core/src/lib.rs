//! Kinetic parametric imaging for dynamic PET.
//!
//! The crate covers the whole pipeline on 2D lattices: one-tissue kinetics
//! ([`kinetics`]), phantom simulation ([`phantom`]), voxelwise curve fitting
//! ([`scf`]), spatially regularized K-means ([`skms`]), Potts random-field
//! machinery ([`potts`]), the Bayesian spatial mixture model fitted by
//! Metropolis-within-Gibbs ([`smm`]), and bias/classification metrics
//! ([`evalmetrics`]).

pub mod error;
pub mod evalmetrics;
pub mod io;
pub mod kinetics;
pub mod phantom;
pub mod potts;
pub mod scf;
pub mod smm;
pub mod skms;

pub use error::{Error, Result};
pub use kinetics::{
    frame_averaged_tac, spillover_frame_tac, tissue_tac, Frame, FrameModel, FrameScheme,
    InputFunction, KineticParams, SpilloverFractions, SpilloverInputs, TacModel,
};
pub use phantom::{default_phantom, Dims, DynamicImage, NoiseKind, NoiseModel, PhantomSpec};
