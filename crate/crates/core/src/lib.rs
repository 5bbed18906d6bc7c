//! Two-sample semiparametric estimation under selection-bias models with
//! censored or interval-censored observations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod data;
pub mod elratio;
pub mod error;
pub mod gof;
pub mod model;
pub mod npmle;
pub mod quadrature;
pub mod sim;
pub mod spmle;

pub use data::{Observation, ObservationKind, SampleScheme, TwoSampleData};
pub use error::{Error, Result};
pub use model::{BiasModel, WeightFunction};
pub use npmle::{DiscreteDistribution, NpmleFit, NpmleOptions};
pub use spmle::{fit_two_sample, PooledData, SpmleFit, SpmleOptions};
