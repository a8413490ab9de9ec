//! Inverse modeling of time-domain dielectric response.
//!
//! The crate generates relaxation-current data from parallel-RC equivalent
//! circuits (optionally with Arrhenius resistances), and recovers circuit
//! parameters with physics-informed neural networks. A Levenberg-Marquardt
//! fit of the closed-form current serves as an independent check.

pub mod autodiff;
pub mod baseline;
pub mod ecm;
pub mod error;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod pinn;
pub mod report;
pub mod synth;

pub use ecm::{ArrheniusLaw, EcmSpec, RcBranch, TempBranch, TempEcmSpec, BOLTZMANN_EV};
pub use error::{Error, Result};
pub use experiment::{StaticExperiment, StaticRun, TempExperiment, TempRun};
pub use model::{NamedValue, StaticPinn, TempPinn};
pub use pinn::{LossParts, LossWeights, ResidualForm, TrainConfig, TrainTrace};
pub use report::FitReport;
pub use synth::{Dataset, NormalizationInfo, Sample};
