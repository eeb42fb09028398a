//! Conditioned diffusion sampling with guided proposals and learned drift
//! corrections.

pub mod analytics;
pub mod autodiff;
pub mod conditioning;
pub mod config;
pub mod error;
pub mod grid;
pub mod guided;
pub mod linalg;
pub mod neural;
pub mod noise;
pub mod pcn;
pub mod sde;
pub mod training;
pub mod zoo;

pub use conditioning::{
    solve_backward_odes, AuxCoefficients, BackwardOdeSolution, LinearAuxiliary, ObservationScheme,
};
pub use error::{BridgeError, Result};
pub use grid::TimeGrid;
pub use guided::{g_functional, guided_drift, sample_guided, GuidedSystem};
pub use neural::{loss_and_grad, sample_neural, theta_forward, MlpArchitecture, NeuralDrift};
pub use noise::WienerPath;
pub use training::{train, TrainConfig, TrainTrace};
pub use sde::{euler_maruyama, SdeModel, Trajectory};
pub use zoo::ZooModel;
