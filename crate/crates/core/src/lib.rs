//! Inference of annual, birth-country-disaggregated bilateral migration flows.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core can be embedded
//! anywhere; file formats, configuration and the command line live in the
//! companion `flowinfer` crate.
//!
//! Module map:
//!
//! * [`domain`]: registries, stock/flow tensors and the stock-evolution
//!   bookkeeping that ties them together.
//! * [`transform`]: the symmetrised Yeo-Johnson transform and standardisation.
//! * [`accounting`]: IPF balancing, demographic-accounting uncertainty, weights,
//!   stock interpolation.
//! * [`covariates`]: per-edge input vectors and gap-filling utilities.
//! * [`nn`]: the recurrent estimator with hand-written reverse mode and Adam.
//! * [`training`]: rollout, weighted loss, backpropagation through the rollout,
//!   ensembles.
//! * [`estimation`]: calibration, elasticities, ensemble/pushforward uncertainty.
//! * [`baselines`]: stock differencing, demographic accounting and the
//!   correlation comparison.
//! * [`synthetic`]: synthetic worlds, corruption and recovery metrics.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod accounting;
pub mod baselines;
pub mod covariates;
pub mod domain;
pub mod error;
pub mod estimation;
pub(crate) mod math;
pub mod nn;
pub mod stats;
pub mod synthetic;
pub mod training;
pub mod transform;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod prelude {
    pub use crate::domain::{
        flows_by_origin, net_migration, stock_step, CountryRegistry, DemographicRates,
        FlowTensor, NetMigrationVector, OriginDestinationMatrix, StockSeries, StockTable,
        TargetDataset, TimeAxis,
    };
    pub use crate::error::{Error, Result};
    pub use crate::nn::{Architecture, NetworkParameters};
    pub use crate::training::{RolloutResult, TrainConfig};
    pub use crate::transform::{PowerTransform, Standardizer};
}
