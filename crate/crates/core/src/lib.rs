pub mod capacity;
pub mod coefficients;
pub mod convergence;
pub mod error;
pub mod expr;
pub mod grid;
pub mod linalg;
pub mod montecarlo;
pub mod noise;
pub mod operator;
pub mod stepper;
pub mod verify;

pub use coefficients::{NonlinearTerm, ObstacleSpec, Role};
pub use error::{Error, Result};
pub use grid::{GridField, SpaceTimeField, SpatialGrid, TimeGrid};
pub use noise::{CovarianceModel, Kernel, NoiseStream};
pub use operator::{CoefficientField, StiffnessOperator};
pub use stepper::{solve, ReflectionMeasure, Scheme, SolutionPath, SpdeProblem};
pub use montecarlo::MeanEstimate;
pub use verify::{CheckEntry, Status, VerificationReport};
