//! Weight surgery on the last linear layer of a Siamese similarity model.
//!
//! A Shattered Class backdoor composes the layer with a projection that kills
//! one class's feature centroid, so its samples scatter in every direction.
//! A Merged Classes backdoor kills the difference of two centroids and
//! stretches the merged direction, so two classes fall into one cone. Both
//! lower the layer's rank, which [`detect`] notices and [`surgery::hide`]
//! repairs from the layer's null space.
//!
//! [`simulator`] builds synthetic cone-clustered embeddings and [`harness`]
//! runs the 10-fold verification protocol over them.
//!
//! ```
//! use weight_surgery::{detect, simulator, surgery};
//!
//! let world = simulator::generate_world(&simulator::WorldConfig::default())?;
//! let target = world.embeddings.only_class(4)?;
//! let (w1, plan) = surgery::install_sc(&world.w0, &target)?;
//! assert_eq!(detect::scan(&w1, None).verdict, detect::Verdict::SuspectedSurgery);
//!
//! let reference = detect::scan(&world.w0, None).spectrum;
//! let hidden = surgery::hide(&w1, &plan, &reference, 7)?;
//! assert_eq!(detect::scan(&hidden, None).verdict, detect::Verdict::Clean);
//! # Ok::<(), weight_surgery::Error>(())
//! ```

pub mod detect;
pub mod error;
pub mod formats;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod seed;
pub mod simulator;
pub mod surgery;

pub use error::{Error, Result};
pub use linalg::{Matrix, SingularSpectrum, Vector};
pub use model::{EmbeddingSet, Space, VerificationHead, WeightMatrix};
pub use surgery::{BackdoorKind, BackdoorPlan, BackdoorRequest};
