//! Numerical core for synthesizing bimanual hand motion on articulated
//! two-part objects: object feature encoding (basis point sets), contact
//! maps, guided DDPM sampling, a parametric LBS hand with fitting and
//! physical refinement, evaluation metrics, and a synthetic-data pipeline.
//!
//! Everything is generic over the scalar type via [`Real`]; the aliases at
//! the crate root fix `f64` for ordinary use.

pub mod contact;
pub mod diffusion;
pub mod error;
pub mod features;
pub mod geometry;
pub mod hand;
pub mod metrics;
pub mod pipeline;
pub mod real;
pub mod refine;
pub mod rng;

pub use error::{Error, Result};
pub use real::Real;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

pub type Mesh = geometry::Mesh<f64>;
pub type RigidTransform = geometry::RigidTransform<f64>;
pub type ObjectTrajectory = geometry::ObjectTrajectory<f64>;
pub type ArticulatedObject = geometry::ArticulatedObject<f64>;
pub type BasisPointSet = features::BasisPointSet<f64>;
pub type ObjectScale = features::ObjectScale<f64>;
pub type PartBpsFeatures = features::PartBpsFeatures<f64>;
pub type GlobalStates = features::GlobalStates<f64>;
pub type HandModel = hand::HandModel<f64>;
pub type HandParams = hand::HandParams<f64>;
pub type HandMotion = hand::HandMotion<f64>;
pub type ContactMap = contact::ContactMap<f64>;
pub type DerivedContact = contact::DerivedContact<f64>;
pub type NoiseSchedule = diffusion::NoiseSchedule<f64>;
pub type GuidanceConfig = diffusion::GuidanceConfig<f64>;
pub type Standardizer = diffusion::Standardizer<f64>;
pub type TinyMlpDenoiser = diffusion::mlp::TinyMlpDenoiser<f64>;
pub type RefineConfig = refine::RefineConfig<f64>;
pub type MetricsReport = metrics::MetricsReport<f64>;
