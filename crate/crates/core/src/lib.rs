//! Non-vacuous PAC-Bayesian generalization bounds for stable recurrent models
//! learned from a single weakly dependent trajectory.
//!
//! The pipeline runs bottom-up: [`numerics`] kernels, [`dynsys`] simulation,
//! [`certify`] stability constants, [`mixing`] data constants, [`loss`],
//! [`mcmc`] prior sampling, [`bound`] assembly, and the synthetic
//! [`experiment`].

pub mod bound;
pub mod certify;
pub mod dynsys;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod mcmc;
pub mod mixing;
pub mod numerics;

pub use bound::{assemble_report, BoundReport, GibbsEstimates, SampleRecord};
pub use certify::{rnn_constants, ClassSConstants, GhPair, LvConvention};
pub use dynsys::{simulate, Activation, RnnSystem, Series, StateSpace, Trajectory};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, LambdaRule, PredictorShape};
pub use loss::{LipschitzMode, LossSpec};
pub use mcmc::{mh_sample, Chain, ChainConfig};
pub use mixing::DataConstants;
pub use numerics::{Matrix, SeededRng};
