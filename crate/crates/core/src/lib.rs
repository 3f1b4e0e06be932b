//! Link-level simulation of RIS-aided OFDM links.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root pin the common double-precision types.
//!
//! * [`scene`]: scenario, RIS geometry, path derivation and Doppler.
//! * [`channel`]: direct and composite tap synthesis, frequency views.
//! * [`metrics`]: achievable/coherent rate, water-filling, quantization,
//!   efficiency and residual Doppler.
//! * [`config`]: strongest-tap and alternating-optimization configurators.
//! * [`nnconf`]: the neural configurator with hand-derived gradients.
//! * [`harness`]: Monte-Carlo experiments, oracles and result files.

pub mod channel;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod nnconf;
pub mod scalar;
pub mod scene;
pub mod settings;

pub use error::{Error, Result};
pub use scalar::{Real, SPEED_OF_LIGHT};

pub type Complex64 = num_complex::Complex<f64>;

pub type Scenario = scene::Scenario<f64>;
pub type RisGrid = scene::RisGrid<f64>;
pub type PathSet = scene::PathSet<f64>;
pub type PathAngles = scene::PathAngles<f64>;
pub type PathProfile = scene::PathProfile<f64>;
pub type ChannelRealization = channel::ChannelRealization<f64>;
pub type FrequencyView = channel::FrequencyView<f64>;
pub type RisConfiguration = config::RisConfiguration<f64>;
pub type PowerAllocation = metrics::PowerAllocation<f64>;
pub type RateReport = metrics::RateReport<f64>;
pub type NnParameters = nnconf::NnParameters<f64>;

pub type Scenario32 = scene::Scenario<f32>;
pub type ChannelRealization32 = channel::ChannelRealization<f32>;
pub type RisConfiguration32 = config::RisConfiguration<f32>;
pub type NnParameters32 = nnconf::NnParameters<f32>;
