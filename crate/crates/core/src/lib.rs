//! Empirical-Bayes parameter selection for convex imaging inverse
//! problems.
//!
//! The crate estimates regularisation parameters by maximising the
//! marginal likelihood of the observed data with a stochastic
//! approximation scheme driven by proximal Langevin sampling, then
//! computes the penalised least-squares reconstruction at the selected
//! parameters. It provides:
//!
//! - [`model`]: likelihood/regulariser assembly with declared scaling
//!   structure and registration-time self-checks;
//! - [`sampler`]: the smoothed-gradient Langevin kernel, chain state
//!   with reproducible substreams, and mixing diagnostics;
//! - [`sapg`]: the projected stochastic parameter search, including
//!   joint noise-variance estimation with staged step refinement;
//! - [`map`]: monotone accelerated proximal-gradient reconstruction;
//! - [`prox`], [`transforms`]: proximal operators, blurs, wavelets,
//!   noise synthesis, metrics and portable image I/O;
//! - [`oracle`]: slow, independent reference computations used by the
//!   test suite to validate everything above.

pub mod error;
pub mod image;
pub mod map;
pub mod model;
pub mod oracle;
pub mod prox;
pub mod sampler;
pub mod sapg;
pub mod transforms;

pub use error::{ChainKind, Error, Result};
pub use image::{DomainTag, ImageVector, Shape};
pub use map::{solve_map, MapResult, Quality};
pub use model::{
    Block, Homogeneity, LikelihoodSpec, PosteriorModel, RegulariserSpec, ThetaDomain,
};
pub use sampler::{ChainState, KernelParams, LambdaRule};
pub use sapg::{
    run_joint_noise, run_sapg, DriftKind, GaussianFamily, JointNoiseConfig, JointNoiseRun,
    SapgConfig, SapgRun, StageReport, StepSchedule, StopRule, StoppedBy, TailWeights, ThetaTrace,
    WeightScheme,
};
